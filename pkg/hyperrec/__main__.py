import sys

from hyperrec.cli import main

sys.exit(main())
