"""
Launcher for the FSAIL command line
Run: python run.py <generate-data|run|report|ablate> [options]
"""
import sys
import os

# Make the app package importable from anywhere
current_dir = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, current_dir)

if __name__ == "__main__":
    from app.main import main

    print("=" * 60)
    print("🤖 FSAIL - TASK-SPECIFIC PROMPTS DESK")
    print("=" * 60)
    print(f"📂 Working directory: {current_dir}")
    print("=" * 60)

    sys.exit(main())
