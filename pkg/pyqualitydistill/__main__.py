import sys

from pyqualitydistill.cli import main

sys.exit(main())
