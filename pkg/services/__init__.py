# Services package for seriestable
