# Tests package for seriestable
