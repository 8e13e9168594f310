import sys

from dynsal.cli.main import main

sys.exit(main())
