"""DPW loop-group toolkit for CMC-1 surfaces with Delaunay ends."""
