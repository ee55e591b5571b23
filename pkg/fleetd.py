#!/usr/bin/env python3
"""
Entry point for running the fleet manager.
This file allows running fleetd with: python fleetd.py [--listen host:port]
"""
from app.fleetd import cli

if __name__ == "__main__":
    cli()
