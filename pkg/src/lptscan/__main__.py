import sys

from lptscan.cli import main

sys.exit(main())
