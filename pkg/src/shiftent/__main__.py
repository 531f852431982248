"""Allow `python -m shiftent ...` to reach the CLI."""

import sys

from .cli import main

sys.exit(main())
