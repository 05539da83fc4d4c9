import sys

from lsdm.harness.cli import main

sys.exit(main())
