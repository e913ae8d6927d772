import sys

from egoaudio.cli import main

sys.exit(main())
