# Series-to-table encoding
