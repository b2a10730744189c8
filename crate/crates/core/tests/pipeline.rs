use ctxnmt::config::RunConfig;
use ctxnmt::corpus::{format_documents, parse_documents, parse_parallel, Vocabulary};
use ctxnmt::decode::DecodeOptions;
use ctxnmt::eval::corpus_bleu;
use ctxnmt::model::{io, Strategy};
use ctxnmt::synthgen::{generate, score_senses, AnswerKey, SynthSpec};
use ctxnmt::train::{train, translate_documents};

fn spec(n_docs: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_docs,
        n_filler: 8,
        seed,
        ..SynthSpec::default()
    }
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let g = generate(&spec(7, 3)).unwrap();
    let (src, tgt, key) = (dir.path().join("s"), dir.path().join("t"), dir.path().join("k"));
    g.corpus.write(&src, &tgt).unwrap();
    g.key.save(&key).unwrap();
    assert_eq!(parse_parallel(&src, &tgt).unwrap(), g.corpus);
    assert_eq!(AnswerKey::load(&key).unwrap(), g.key);

    let docs = g.corpus.targets();
    let text = format_documents(&docs);
    assert_eq!(parse_documents(&text, &src).unwrap(), docs);
    // References score perfectly against themselves.
    assert_eq!(score_senses(&docs, &g.key).unwrap(), 1.0);
}

#[test]
fn train_save_load_translate() {
    let tr = generate(&spec(40, 1)).unwrap();
    let dev = generate(&spec(5, 2)).unwrap();
    let sv = Vocabulary::build(tr.corpus.sources().iter().flatten(), 100).unwrap();
    let tv = Vocabulary::build(tr.corpus.targets().iter().flatten(), 100).unwrap();
    let cfg = RunConfig {
        strategy: Strategy::InitBothGatedAux,
        emb_dim: 12,
        enc_hidden: 12,
        dec_hidden: 12,
        ctx_dim: 12,
        attn_dim: 12,
        readout_dim: 12,
        epochs: 2,
        seed: 9,
        ..RunConfig::toy()
    };
    let mut lines = Vec::new();
    let out = train::<f32>(&cfg, &tr.corpus, &dev.corpus, &sv, &tv, &mut |l| lines.push(l.to_string())).unwrap();
    assert!(lines[0].starts_with("strategy init-both-gated-aux k 3 "));
    assert!(lines.last().unwrap().starts_with("stop after epoch 2 "));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    io::save(&path, &out.model, &sv, &tv, &[("note", "x".into())]).unwrap();
    let ck = io::load(&path).unwrap();
    assert_eq!(ck.metadata.get("note").map(String::as_str), Some("x"));
    assert_eq!(ck.model.strategy(), Strategy::InitBothGatedAux);

    let sources = dev.corpus.sources();
    for beam in [1, 3] {
        let opts = DecodeOptions {
            beam,
            ..DecodeOptions::default()
        };
        let a = translate_documents(&out.model, &sources, &sv, &tv, &opts).unwrap();
        let b = translate_documents(&ck.model, &sources, &ck.src_vocab, &ck.tgt_vocab, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.iter().map(Vec::len).collect::<Vec<_>>(),
            sources.iter().map(Vec::len).collect::<Vec<_>>()
        );
    }

    let refs: Vec<_> = dev.corpus.targets().into_iter().flatten().map(|r| vec![r]).collect();
    let hyps: Vec<_> = translate_documents(&ck.model, &sources, &sv, &tv, &DecodeOptions::default())
        .unwrap()
        .into_iter()
        .flatten()
        .collect();
    let bleu = corpus_bleu(&hyps, &refs, true).unwrap().bleu;
    assert!((0.0..=1.0).contains(&bleu));
}
