import sys

from advhighway.cli import main

sys.exit(main())
