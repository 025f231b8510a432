import sys

from untangle.cli import main

sys.exit(main())
