import sys

from chartalign.cli import main

sys.exit(main())
