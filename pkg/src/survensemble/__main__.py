import sys

from survensemble.cli import main

sys.exit(main())
