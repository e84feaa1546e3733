"""Pytest wiring: configure Django the same way backend/manage.py does."""
import os
import sys

import django

BACKEND_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'backend')
if BACKEND_DIR not in sys.path:
    sys.path.insert(0, BACKEND_DIR)

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'epictrl.settings')
django.setup()
