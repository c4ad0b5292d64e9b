#![no_main]

use libfuzzer_sys::fuzz_target;
use ssm_prune::pruning::PositionMap;

fuzz_target!(|input: (u16, &str)| {
    let (len, json) = input;
    if let Ok(map) = PositionMap::from_json_array(len as usize, json) {
        // Anything accepted must satisfy the map invariants and round-trip.
        assert!(map.kept_len() >= 1);
        assert!(map.remaining_indices().windows(2).all(|w| w[0] < w[1]));
        assert!(map.remaining_indices().iter().all(|&q| q < map.original_len()));
        let back = PositionMap::from_json_array(len as usize, &map.to_json_array())
            .expect("accepted map round-trips");
        assert_eq!(back, map);
    }
});
