"""Physical constants shared across the package."""

SPEED_OF_LIGHT = 299792458.0  # meters per second, in air taken as vacuum
