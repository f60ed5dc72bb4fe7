# UEA .ts archive parsing
