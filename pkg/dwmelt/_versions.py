versions = {"checkpoint": "1.0", "csv": "1.0"}
