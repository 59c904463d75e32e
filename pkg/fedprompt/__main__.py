import sys

from fedprompt.main import main

sys.exit(main())
