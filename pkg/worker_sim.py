#!/usr/bin/env python3
"""
Entry point for a simulated robot worker.
This file allows running a worker with: python worker_sim.py --name hsr --listen 127.0.0.1:7431
"""
from app.worker import cli

if __name__ == "__main__":
    cli()
