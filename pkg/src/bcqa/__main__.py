import sys

from bcqa.cli import main

sys.exit(main())
