import sys

from hcqlab.cli import main

sys.exit(main())
