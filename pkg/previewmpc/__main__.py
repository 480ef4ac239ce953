import sys

from previewmpc.cli import main

sys.exit(main())
