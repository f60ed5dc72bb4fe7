# Utils package for seriestable
