"""Allow ``python -m fogkit`` to behave like the installed executable."""
from __future__ import annotations

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
