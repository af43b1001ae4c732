# This file makes the 'pipeline' directory a Python package.
