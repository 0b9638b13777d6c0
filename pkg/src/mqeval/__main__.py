import sys

from mqeval.cli import main

sys.exit(main())
