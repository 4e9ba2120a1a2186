"""Sample jobs: WordCount and one-iteration KMeans."""
