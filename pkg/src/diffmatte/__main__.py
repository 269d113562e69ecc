import sys

from diffmatte.cli import main

sys.exit(main())
