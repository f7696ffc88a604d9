"""Allow ``python -m modhand`` as an alias for the console script."""

import sys

from modhand.cli import main

sys.exit(main())
