import sys

from gmae.cli import main

sys.exit(main())
