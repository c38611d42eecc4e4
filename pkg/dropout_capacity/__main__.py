"""Allow `python -m dropout_capacity`."""
import sys

from .cli import main

sys.exit(main())
