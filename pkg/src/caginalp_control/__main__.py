"""Module execution hook: ``python -m caginalp_control``."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
