import sys

from neumannlab.cli import main

sys.exit(main())
