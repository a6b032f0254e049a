import sys

from sgdetect.cli import main

sys.exit(main())
