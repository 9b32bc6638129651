# Test package for the drive-through gate engine
