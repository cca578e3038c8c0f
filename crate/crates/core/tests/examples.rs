macro_rules! example {
    ($name:ident, $file:literal) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $name() {
            $name::run().expect(concat!($file, " should run"));
        }
    };
}

example!(city_similarity, "city_similarity.rs");
example!(fusion_training, "fusion_training.rs");
example!(city_adaptation, "city_adaptation.rs");
example!(sentiment_trends, "sentiment_trends.rs");
example!(annotation_agreement, "annotation_agreement.rs");
example!(vif_screening, "vif_screening.rs");
example!(od_mobility, "od_mobility.rs");
example!(ablation, "ablation.rs");
example!(end_to_end, "end_to_end.rs");
