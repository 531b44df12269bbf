"""In-situ training of implicit neural compressors with sketched replay."""
