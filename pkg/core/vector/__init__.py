# Distance measures, neighbor retrieval and clustering
