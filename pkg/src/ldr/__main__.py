import sys

from ldr.cli import main

sys.exit(main())
