"""Topic publish-subscribe transport and discovery beacons."""
