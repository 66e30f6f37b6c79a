import sys

from slicekit.cli import main

sys.exit(main())
