import os
import sys

# same trick the scripts use: the repository root holds functions/ and processors/
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
