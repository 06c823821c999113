"""Allow `python -m secel ...` to reach the command-line interface."""

import sys

from .cli import main

sys.exit(main())
