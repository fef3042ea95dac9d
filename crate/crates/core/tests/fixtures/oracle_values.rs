// Reference values from independent implementations: scipy.stats for the
// t-tests and one-way ANOVAs, and a 50-digit spherical law of cosines
// (mpmath, radius 6371 km) for the city distances.

pub const T_TESTS: &[(&[f64], &[f64], f64, f64)] = &[
    (&[2.527, -1.741, -0.518, -0.151, -1.482, -2.736, 1.298, 0.722], &[-2.429, 4.021, 1.953, -0.639], -0.7575328327492501, 0.4662062481633328),
    (&[-0.834, -0.021, 1.678], &[-1.385, 1.364], 0.20333131200998378, 0.8518865350128891),
    (&[2.845, -0.399, 2.006, -3.043, -0.116, 1.099, -2.487, 0.037, 3.649], &[4.427, 1.666, 1.743, -0.938], -0.9844502714402891, 0.3460524145380559),
    (&[-2.525, 1.383, 1.804, -1.018, -2.157, 0.815, 0.926, 0.038], &[2.405, 0.361, 0.401, -1.162, 0.704, 2.521, 0.592, 0.606, 1.15], -1.3910951909831313, 0.18448760493717034),
    (&[1.461, 1.473, 1.637, -1.19, 1.0, -2.805, 0.934, -2.123], &[0.393, 1.211], -0.5626541487600633, 0.5890857170859609),
    (&[0.695, -2.781, -1.215, 1.877, -1.809, 1.801, -2.277, -1.315, -1.691, 0.514, 1.569], &[-1.099, 0.228, 2.933, 0.024], -0.9313865475140218, 0.36862852208194685),
    (&[1.373, 0.153, -0.803, -2.991, 2.237, -0.542], &[0.501, -1.095, 2.453, 1.622, 1.971, 0.334, 1.202, 1.836], -1.5099685502753553, 0.15692556655241258),
    (&[1.325, 0.576, -0.019, -0.797, -1.231, 1.42, 0.211, -3.292, 0.39, 2.828], &[0.087, -2.28, 0.313, 1.677, 0.803, -0.142, 3.272, 3.35, 0.352, 1.72, 1.089], -1.1085569486258589, 0.28145707827402866),
    (&[3.707, 2.44, 0.975, -0.507, -0.824, 0.749, 3.116, 1.401, 0.906, 1.315, 0.871], &[1.321, -1.184, -2.463, -0.138, -1.224, 2.923, 0.262, 0.121, -1.807, 0.923, -0.435], 2.3229030906140133, 0.030845049411285592),
    (&[2.582, -0.652, 1.721], &[-3.584, -0.51, 2.369, 1.685, 0.763, 0.456, -1.629, -1.54, 0.835, 3.143, -2.756], 0.9573942725935306, 0.3572600935458651),
];
pub const ANOVA_TESTS: &[(&[&[f64]], f64, f64)] = &[
    (&[&[0.601, 0.951, -0.869], &[0.446, -0.628, -0.829, -0.483, 0.329], &[1.174, 0.775, 0.877]], 3.1371060527928263, 0.09866232937417468),
    (&[&[-0.721, 1.121, -0.055, -0.082, 0.936, 1.239, 1.273], &[0.35, 0.689, 0.579, 1.797, 0.692, 1.038, 0.372], &[2.171, -1.253]], 0.1755669513823617, 0.840937664837768),
    (&[&[1.269, 0.381, 0.755, -1.159, 2.15, -0.15, -0.161, -1.079, 0.878], &[-0.192, 0.626, 1.086, 1.615, 0.616, -0.565, -0.157, -1.898]], 0.11487823259493304, 0.739355523400856),
    (&[&[0.736, 0.466, -0.108, -0.341, 1.585, 0.282, 0.91, 0.395], &[-0.269, 1.955]], 0.3172324300674591, 0.5887092523847853),
    (&[&[-1.196, -0.429, -0.73], &[-0.2, 1.387, 0.454, 0.752, -1.188], &[-0.047, 1.885, -0.404, 1.979, -0.231], &[0.354, 1.397, 0.3, 0.943, 2.873, 0.825, 3.237, 0.741]], 3.2626453716527943, 0.047184751450991984),
    (&[&[0.075, -0.409], &[2.157, 1.261, 1.581, 1.032, 2.871, 1.194, 0.931, -0.429, -0.509], &[1.798, 1.917]], 2.244368550032029, 0.15662004310733538),
    (&[&[0.531, 0.193, -1.118, 0.512, -2.271, 0.263], &[2.871, -0.62, 0.419, -1.494]], 0.4151790474404703, 0.5373851393701204),
    (&[&[0.756, -1.042], &[0.045, 0.022], &[0.991, 1.284, 2.03, 1.633, 0.235, 2.215, 2.048, -0.759]], 2.1325796374579324, 0.17453606577861586),
    (&[&[0.826, 0.966, 0.547, -1.297, -0.268, -2.07], &[2.429, 1.082, 1.236, -0.113, -0.616, -0.67, 0.524], &[-0.003, 0.162, 1.944, -0.841], &[0.69, 1.1, 1.07]], 0.9050742478885455, 0.4604158414869832),
    (&[&[0.194, -0.129, 0.354], &[-0.683, 0.645, 0.621, -0.26, 0.181, -0.156, 1.756, -2.72, -1.048], &[0.422, 0.122, 0.389, 1.519, -0.833, -0.046, 0.577], &[-0.002, 1.57, 1.53, 0.49, -0.571]], 0.759735763904771, 0.5298220984812894),
];
pub const CITY_PAIRS: &[((f64, f64), (f64, f64), f64)] = &[
    ((40.7128, -74.006), (34.0522, -118.2437), 3935.7462546097232), // New York - Los Angeles
    ((40.7128, -74.006), (51.5074, -0.1278), 5570.2221797379577), // New York - London
    ((51.5074, -0.1278), (48.8566, 2.3522), 343.55606034104167), // London - Paris
    ((35.6762, 139.6503), (-33.8688, 151.2093), 7825.8186165161572), // Tokyo - Sydney
    ((-33.9249, 18.4241), (-23.5505, -46.6333), 6344.6962139977311), // Cape Town - Sao Paulo
    ((55.7558, 37.6173), (64.1466, -21.9426), 3307.6288296092881), // Moscow - Reykjavik
    ((1.3521, 103.8198), (61.2181, -149.9003), 10737.045675653458), // Singapore - Anchorage
    ((-34.6037, -58.3816), (30.0444, 31.2357), 11812.744985643355), // Buenos Aires - Cairo
    ((19.076, 72.8777), (21.3069, -157.8583), 12899.525967964418), // Mumbai - Honolulu
    ((-36.8485, 174.7633), (-1.2921, 36.8219), 13953.065015654618), // Auckland - Nairobi
    ((-12.0464, -77.0428), (39.9042, 116.4074), 16647.619072036655), // Lima - Beijing
    ((40.7128, -74.006), (35.6762, 139.6503), 10851.732848762308), // New York - Tokyo
    ((34.0522, -118.2437), (-36.8485, 174.7633), 10496.482125254981), // Los Angeles - Auckland
    ((48.8566, 2.3522), (1.3521, 103.8198), 10729.024319088332), // Paris - Singapore
    ((-33.8688, 151.2093), (-34.6037, -58.3816), 11801.06612578914), // Sydney - Buenos Aires
    ((-23.5505, -46.6333), (19.076, 72.8777), 13774.010703118254), // Sao Paulo - Mumbai
    ((64.1466, -21.9426), (-12.0464, -77.0428), 9649.3995385202654), // Reykjavik - Lima
    ((61.2181, -149.9003), (39.9042, 116.4074), 6384.8781028922282), // Anchorage - Beijing
    ((30.0444, 31.2357), (-33.9249, 18.4241), 7239.2469445855689), // Cairo - Cape Town
    ((21.3069, -157.8583), (55.7558, 37.6173), 11322.124639158132), // Honolulu - Moscow
];
