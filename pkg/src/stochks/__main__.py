import sys

from stochks.cli import main

sys.exit(main())
