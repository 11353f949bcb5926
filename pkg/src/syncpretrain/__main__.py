import sys

from syncpretrain.cli import main

sys.exit(main())
