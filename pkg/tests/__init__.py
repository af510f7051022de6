# Tests for the inclusion reachability engine
