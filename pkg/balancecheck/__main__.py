import sys

from balancecheck.cli import main

sys.exit(main())
