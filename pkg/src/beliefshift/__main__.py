import sys

from beliefshift.cli import main

sys.exit(main())
