"""Switch snapshots and clone-based live migration."""
