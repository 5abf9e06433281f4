import sys

from earlyqnet.cli import main

sys.exit(main())
