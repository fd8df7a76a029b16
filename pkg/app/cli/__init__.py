# Command-line module
