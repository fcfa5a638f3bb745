//! Length-prefixed frames over TCP and the capability handshake.

use std::time::Duration;

use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use waku_core::wire::{
    advertisement_frame, decode_frame_inner, encode_frame, frame_length, read_advertisement,
    Capabilities, Frame, PeerId, WireError, HANDSHAKE_TIMEOUT_NS,
};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("handshake timed out")]
    HandshakeTimeout,
    #[error("expected peer {expected}, remote advertised {actual}")]
    PeerMismatch { expected: PeerId, actual: PeerId },
}

pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R, max_body: usize) -> Result<Frame, TransportError> {
    let mut prefix = [0u8; 4];
    r.read_exact(&mut prefix).await?;
    let len = frame_length(prefix, max_body)?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).await?;
    Ok(decode_frame_inner(&buf, max_body)?)
}

pub async fn write_frame<W: AsyncWrite + Unpin>(w: &mut W, frame: &Frame) -> Result<(), TransportError> {
    w.write_all(&encode_frame(frame)?).await?;
    Ok(())
}

/// Exchanges advertisements. A dialer passes the peer id it expects and
/// rejects any other.
pub async fn handshake<S: AsyncRead + AsyncWrite + Unpin>(
    stream: &mut S,
    local: &Capabilities,
    expected: Option<&PeerId>,
    max_body: usize,
) -> Result<Capabilities, TransportError> {
    let exchange = async {
        write_frame(stream, &advertisement_frame(local)).await?;
        let frame = read_frame(stream, max_body).await?;
        Ok::<_, TransportError>(read_advertisement(&frame)?)
    };
    let timeout = Duration::from_nanos(HANDSHAKE_TIMEOUT_NS as u64);
    let remote = tokio::time::timeout(timeout, exchange)
        .await
        .map_err(|_| TransportError::HandshakeTimeout)??;
    if let Some(expected) = expected {
        if remote.peer != *expected {
            return Err(TransportError::PeerMismatch {
                expected: expected.clone(),
                actual: remote.peer,
            });
        }
    }
    Ok(remote)
}
