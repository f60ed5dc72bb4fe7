# Core module for seriestable: datasets, distances, clustering, table encoding, config
