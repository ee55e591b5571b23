#!/usr/bin/env python3
"""
Entry point for the operator CLI.
This file allows running robotctl with: python robotctl.py <command> ...
"""
from app.robotctl import main

if __name__ == "__main__":
    main()
