//! Backend selection: `toy:<fixture.json>` or `remote:<base-url>`.

use std::path::PathBuf;
use std::str::FromStr;

use guidedec::align::build_alignment;
use guidedec::reference::ToyFixture;
use guidedec::{
    AlignmentMap, AutoregressiveModel, Backends, MaskedBackend, MaskedModel, TokenId, Tokenizer,
    WordTokenizer,
};
use guidedec_remote::{RemoteBackend, RemoteClient};

use crate::Failure;

/// GPT-2 style end-of-text marker looked up in remote AR vocabularies.
pub const REMOTE_EOS: &str = "<|endoftext|>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Toy(PathBuf),
    /// `None` means "use the default URL".
    Remote(Option<String>),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("toy:") {
            if path.is_empty() {
                return Err("toy backend needs a fixture path".into());
            }
            return Ok(Self::Toy(PathBuf::from(path)));
        }
        if s == "remote" {
            return Ok(Self::Remote(None));
        }
        if let Some(url) = s.strip_prefix("remote:") {
            return Ok(Self::Remote((!url.is_empty()).then(|| url.to_string())));
        }
        Err(format!("expected toy:<path> or remote:<url>, got {s:?}"))
    }
}

pub struct LoadedAr {
    pub model: Box<dyn AutoregressiveModel>,
    pub tokenizer: Box<dyn Tokenizer>,
    pub eos: Option<TokenId>,
}

pub struct LoadedMlm {
    pub model: Box<dyn MaskedModel>,
    pub tokenizer: Box<dyn Tokenizer>,
}

/// Everything a decoder borrows, owned in one place.
pub struct Models {
    pub ar: LoadedAr,
    pub mlm: Option<LoadedMlm>,
    /// Present together with `mlm`.
    pub alignment: Option<AlignmentMap>,
    scorer: Option<Box<dyn AutoregressiveModel>>,
}

impl Models {
    pub fn backends(&self) -> Backends<'_> {
        let mlm = self
            .mlm
            .as_ref()
            .zip(self.alignment.as_ref())
            .map(|(m, alignment)| MaskedBackend {
                model: m.model.as_ref(),
                tokenizer: (!alignment.is_identity()).then_some(m.tokenizer.as_ref()),
                alignment: alignment.clone(),
            });
        Backends {
            ar: self.ar.model.as_ref(),
            ar_tokenizer: self.ar.tokenizer.as_ref(),
            mlm,
            eos: self.ar.eos,
        }
    }

    /// Model used for perplexity: the dedicated scorer if one was loaded,
    /// otherwise the AR model.
    pub fn scorer(&self) -> &dyn AutoregressiveModel {
        self.scorer.as_deref().unwrap_or(self.ar.model.as_ref())
    }
}

/// Resolves `remote` without a URL against the default.
fn remote_url(url: &Option<String>, default_url: Option<&str>) -> Result<String, Failure> {
    url.clone()
        .or_else(|| default_url.map(String::from))
        .filter(|u| !u.is_empty())
        .ok_or_else(|| {
            Failure::usage(
                "remote backend has no URL; pass remote:<url> or set GUIDEDEC_BACKEND_URL",
            )
        })
}

fn load_fixture(path: &PathBuf) -> Result<ToyFixture, Failure> {
    ToyFixture::from_json_file(path)
        .map_err(|e| Failure::usage(format!("fixture {}: {e}", path.display())))
}

fn connect(url: &str) -> Result<RemoteBackend, Failure> {
    RemoteBackend::connect(RemoteClient::new(url))
        .map_err(|e| Failure::backend(format!("{url}: {e}")))
}

pub fn load_ar(spec: &BackendSpec, default_url: Option<&str>) -> Result<LoadedAr, Failure> {
    match spec {
        BackendSpec::Toy(path) => {
            let f = load_fixture(path)?;
            let tokenizer = f.tokenizer();
            let eos = f.eos;
            let model = f.ar.ok_or_else(|| {
                Failure::usage(format!("fixture {} defines no AR model", path.display()))
            })?;
            Ok(LoadedAr {
                model: Box::new(model),
                tokenizer: Box::new(tokenizer),
                eos,
            })
        }
        BackendSpec::Remote(url) => {
            let remote = connect(&remote_url(url, default_url)?)?;
            let eos = remote.ar.vocabulary().id(REMOTE_EOS);
            Ok(LoadedAr {
                model: Box::new(remote.ar),
                tokenizer: Box::new(remote.ar_tokenizer),
                eos,
            })
        }
    }
}

pub fn load_mlm(spec: &BackendSpec, default_url: Option<&str>) -> Result<LoadedMlm, Failure> {
    match spec {
        BackendSpec::Toy(path) => {
            let f = load_fixture(path)?;
            let unk = f.unk.and_then(|u| f.vocabulary.token(u).map(String::from));
            let model = f.mlm.ok_or_else(|| {
                Failure::usage(format!(
                    "fixture {} defines no masked model",
                    path.display()
                ))
            })?;
            let vocab = MaskedModel::vocabulary(&model).clone();
            let tokenizer = match unk.and_then(|t| vocab.id(&t)) {
                Some(u) => {
                    WordTokenizer::with_unk(vocab, u).map_err(|e| Failure::usage(e.to_string()))?
                }
                None => WordTokenizer::new(vocab),
            };
            Ok(LoadedMlm {
                model: Box::new(model),
                tokenizer: Box::new(tokenizer),
            })
        }
        BackendSpec::Remote(url) => {
            let remote = connect(&remote_url(url, default_url)?)?;
            Ok(LoadedMlm {
                model: Box::new(remote.mlm),
                tokenizer: Box::new(remote.mlm_tokenizer),
            })
        }
    }
}

/// Which backends to load for one command.
#[derive(Debug, Clone, Default)]
pub struct Selection {
    pub ar: Option<BackendSpec>,
    pub mlm: Option<BackendSpec>,
    pub scorer: Option<BackendSpec>,
    pub default_url: Option<String>,
    pub need_mlm: bool,
}

pub fn load(sel: &Selection) -> Result<Models, Failure> {
    let url = sel.default_url.as_deref();
    let ar_spec = sel
        .ar
        .clone()
        .or_else(|| url.map(|u| BackendSpec::Remote(Some(u.to_string()))))
        .ok_or_else(|| Failure::usage("no backend given; use --backend or --ar-backend"))?;
    let ar = load_ar(&ar_spec, url)?;

    let mlm_spec = sel.mlm.clone().or_else(|| match &ar_spec {
        // a remote server always serves both models
        BackendSpec::Remote(_) => Some(ar_spec.clone()),
        BackendSpec::Toy(_) => None,
    });
    let mlm = match mlm_spec {
        Some(spec) => Some(load_mlm(&spec, url)?),
        None if sel.need_mlm => {
            return Err(Failure::usage(
                "the selected strategy needs a masked model; use --mlm-backend",
            ))
        }
        None => None,
    };
    let alignment = match &mlm {
        None => None,
        Some(m) => {
            let a = ar.model.vocabulary();
            let b = m.model.vocabulary();
            Some(if a == b {
                AlignmentMap::identity(a.len())
            } else {
                build_alignment(a, b).map_err(|e| Failure::usage(e.to_string()))?
            })
        }
    };

    let scorer = match &sel.scorer {
        None => None,
        Some(spec) => {
            let s = load_ar(spec, url)?;
            if s.model.vocabulary() != ar.model.vocabulary() {
                return Err(Failure::usage(
                    "the scorer must share the AR model's vocabulary",
                ));
            }
            Some(s.model)
        }
    };
    Ok(Models {
        ar,
        mlm,
        alignment,
        scorer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_backend_specs() {
        assert_eq!(
            "toy:a/b.json".parse(),
            Ok(BackendSpec::Toy("a/b.json".into()))
        );
        assert_eq!(
            "remote:http://h:1".parse(),
            Ok(BackendSpec::Remote(Some("http://h:1".into())))
        );
        assert_eq!("remote".parse(), Ok(BackendSpec::Remote(None)));
        assert_eq!("remote:".parse(), Ok(BackendSpec::Remote(None)));
        assert!("toy:".parse::<BackendSpec>().is_err());
        assert!("http://h".parse::<BackendSpec>().is_err());
    }

    #[test]
    fn remote_without_url_needs_default() {
        assert!(remote_url(&None, None).is_err());
        assert_eq!(remote_url(&None, Some("http://x")).unwrap(), "http://x");
        assert_eq!(
            remote_url(&Some("http://y".into()), Some("http://x")).unwrap(),
            "http://y"
        );
    }
}
