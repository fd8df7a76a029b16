# Policy network module
